from hypothesis import settings

settings.register_profile("ci", deadline=None, print_blob=True)
settings.load_profile("ci")

# acceptance outcomes, echoed once more at the end of the session
OUTCOMES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if OUTCOMES:
        terminalreporter.section("acceptance criteria")
        for line in OUTCOMES:
            terminalreporter.write_line(line)
