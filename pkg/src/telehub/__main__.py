"""Entry point for python -m telehub."""

from .cli import main

if __name__ == "__main__":
    main()
