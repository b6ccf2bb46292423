#!/usr/bin/env python3
"""Render a figure from mflq run artifacts.

Usage: render.py <fig1|fig2|fig3> <input_dir> <output.png>
"""
import sys

from mflq_figures import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
