#!/usr/bin/env python3
"""Regenerates src/unicode_tables.cpp from Python's unicodedata (UCD).

Run from the repository root:

    python3 scripts/gen_unicode_tables.py > src/unicode_tables.cpp

The generated file is committed so the build does not depend on Python.
Hangul syllables (AC00..D7A3) are excluded from the tables; they are
(de)composed algorithmically at runtime.
"""

import sys
import unicodedata

HANGUL_S_BASE = 0xAC00
HANGUL_S_COUNT = 11172


def is_hangul_syllable(cp):
    return HANGUL_S_BASE <= cp < HANGUL_S_BASE + HANGUL_S_COUNT


def main():
    decomps = []   # (cp, a, b)  b == 0 for singleton decompositions
    ccc = []       # (cp, class)
    comps = []     # (a, b) -> composite, primary composites only

    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        ch = chr(cp)
        k = unicodedata.combining(ch)
        if k:
            ccc.append((cp, k))
        if is_hangul_syllable(cp):
            continue
        d = unicodedata.decomposition(ch)
        if not d or d.startswith("<"):
            continue
        parts = [int(x, 16) for x in d.split()]
        if len(parts) == 1:
            decomps.append((cp, parts[0], 0))
        elif len(parts) == 2:
            decomps.append((cp, parts[0], parts[1]))
            # primary composite iff NFC maps the pair back to cp
            if unicodedata.normalize("NFC", chr(parts[0]) + chr(parts[1])) == ch:
                comps.append((parts[0], parts[1], cp))
        else:
            raise AssertionError("canonical decompositions have length <= 2")

    spaces = [cp for cp in range(0x110000)
              if not (0xD800 <= cp <= 0xDFFF) and chr(cp).isspace()]

    comps.sort()
    out = sys.stdout
    out.write("// Generated by scripts/gen_unicode_tables.py (UCD %s). Do not edit.\n"
              % unicodedata.unidata_version)
    out.write('#include "toklab/unicode.hpp"\n\n')
    out.write("namespace toklab::unicode {\n\n")

    out.write("const DecompEntry kDecompTable[] = {\n")
    for cp, a, b in decomps:
        out.write("  {0x%X, 0x%X, 0x%X},\n" % (cp, a, b))
    out.write("};\n")
    out.write("const std::size_t kDecompTableSize = sizeof(kDecompTable) / sizeof(kDecompTable[0]);\n\n")

    out.write("const CccEntry kCccTable[] = {\n")
    for cp, k in ccc:
        out.write("  {0x%X, %d},\n" % (cp, k))
    out.write("};\n")
    out.write("const std::size_t kCccTableSize = sizeof(kCccTable) / sizeof(kCccTable[0]);\n\n")

    out.write("const CompEntry kCompTable[] = {\n")
    for a, b, cp in comps:
        out.write("  {0x%X, 0x%X, 0x%X},\n" % (a, b, cp))
    out.write("};\n")
    out.write("const std::size_t kCompTableSize = sizeof(kCompTable) / sizeof(kCompTable[0]);\n\n")

    out.write("const char32_t kWhitespaceTable[] = {\n  ")
    out.write(", ".join("0x%X" % cp for cp in spaces))
    out.write("\n};\n")
    out.write("const std::size_t kWhitespaceTableSize = sizeof(kWhitespaceTable) / sizeof(kWhitespaceTable[0]);\n\n")

    out.write("}  // namespace toklab::unicode\n")


if __name__ == "__main__":
    main()
