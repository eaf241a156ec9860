"""Entry point for ``python -m manifill``."""

from manifill.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
