"""Exports torchvision VGG19 weights for the perceptual and style losses.

Usage: python tools/export_vgg19.py vgg19.stearch [--random]
"""

import argparse

import torchvision

from stroke_erase.vgg_export import export_features


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output")
    parser.add_argument("--random", action="store_true", help="skip the ImageNet download")
    args = parser.parse_args()
    weights = None if args.random else torchvision.models.VGG19_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg19(weights=weights)
    path = export_features(model.features, args.output)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
