"""Allow ``python -m conegrad`` to run the command-line interface."""

from conegrad.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
