"""
Entry point for the popkit command line.
Installed as the ``popkit`` console script; ``python run.py`` works the same.
"""
from app import create_cli


def main():
    create_cli()(prog_name='popkit')


if __name__ == "__main__":
    main()
