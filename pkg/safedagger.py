#!/usr/bin/env python3
"""safedagger — imitation learning lab (shim → safedagger.cli.main)."""
from safedagger.cli import main

if __name__ == "__main__":
    main()
