# Make tests directory a Python package
