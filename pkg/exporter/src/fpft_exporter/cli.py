"""Command-line entry point: fpft-export."""

import argparse
import sys

from .export import ExportJob, export_features, export_templates


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fpft-export",
        description="export transformer patch tokens to FPFT feature files")
    p.add_argument("--images", nargs="+",
                   help="input image files (mutually exclusive with "
                        "--templates-dir)")
    p.add_argument("--templates-dir",
                   help="directory of template_<id>.png renders")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layer", type=int, default=18)
    p.add_argument("--model", default="vit-l14-reg")
    p.add_argument("--global-token", choices=["on", "off"], default="off")
    p.add_argument("--weights", help="state-dict file; omit for the seeded "
                                     "random-init fallback")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if bool(args.images) == bool(args.templates_dir):
        print("error: give exactly one of --images / --templates-dir",
              file=sys.stderr)
        return 2
    job = ExportJob(image_paths=args.images or [], out_dir=args.out,
                    model_name=args.model, layer=args.layer,
                    device=args.device, weights_path=args.weights,
                    seed=args.seed, global_token=args.global_token == "on")
    try:
        if args.templates_dir:
            report = export_templates(args.templates_dir, job)
        else:
            report = export_features(job)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path, reason in report.failed:
        print(f"failed: {path}: {reason}", file=sys.stderr)
    print(f"wrote {len(report.written)} files to {args.out}")
    return 0 if report.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
