"""Command line interface (entry point: ``geps.cli.main:main``)."""
