def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-scale experiments, deselect with -m "not slow"')
