"""python -m core_morse_sturm のエントリーポイント."""

from core_morse_sturm.main import cli_main

if __name__ == "__main__":
    cli_main()
