# Make api directory a Python package
