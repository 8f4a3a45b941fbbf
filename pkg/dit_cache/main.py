"""
dit_cache - Main Entry Point
Learned block-level feature caching for a toy Diffusion Transformer
"""

import sys

from dit_cache.main_application import main

if __name__ == "__main__":
    sys.exit(main())
