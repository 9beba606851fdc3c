"""Check an exported archive against its backbone's declared geometry.

Usage: patchguard-verify <archive> [--backbone deit_base]
"""

from __future__ import annotations

import argparse
import re
import sys

from patchguard.archive import load_archive
from patchguard.errors import ArchiveError

from .backbones import EXPECTED_SCALES


def backbone_id_of(tag):
    """Leading identifier of a recorded backbone tag such as
    'resnet50[2,3,4](weights=imagenet)'."""
    match = re.match(r"[a-z0-9_]+", tag)
    return match.group(0) if match else tag


def verify(archive_path, backbone_id=None) -> list[str]:
    """Return a list of violations; an empty list means the archive is
    well-formed and matches the backbone's expected grids."""
    try:
        dataset = load_archive(archive_path)
    except ArchiveError as exc:
        return [f"archive: {exc}"]
    except FileNotFoundError:
        return [f"archive: {archive_path} does not exist"]

    violations = []
    backbone_id = backbone_id or backbone_id_of(dataset.backbone)
    expected = EXPECTED_SCALES.get(backbone_id)
    if expected is None:
        violations.append(f"backbone: unknown id '{backbone_id}'")
    else:
        for i, scale in enumerate(dataset.scales):
            if scale not in expected:
                violations.append(
                    f"scale {i}: {scale} is not a valid {backbone_id} grid "
                    f"(expected one of {expected})"
                )

    for sample in dataset.test:
        if sample.label == 1 and sample.mask is None:
            violations.append(f"sample {sample.id}: anomalous but has no mask")
    return violations


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="patchguard-verify",
        description="Verify an exported patch-embedding archive.",
    )
    parser.add_argument("archive")
    parser.add_argument("--backbone", default=None,
                        help="expected backbone id; default: read from the archive")
    args = parser.parse_args(argv)

    violations = verify(args.archive, backbone_id=args.backbone)
    if violations:
        for v in violations:
            print(f"violation: {v}")
    else:
        print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
