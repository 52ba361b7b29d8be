#!/usr/bin/env python3
"""Regenerates the synthetic benchmark-scale annotation fixtures.

Counts match the two evaluation datasets; boxes and image sizes are random
but in bounds and deterministic.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent


def build(name, images, side, categories, seed):
    rng = random.Random(seed)
    imgs = [
        {"id": i + 1, "file_name": f"{name}_{i + 1:04d}.png", "width": side(rng), "height": side(rng)}
        for i in range(images)
    ]
    owners = []
    for cat_id, (_, count) in enumerate(categories, start=1):
        # Every image receives at least one primary-class box.
        if cat_id == 1:
            owners += [(im["id"], cat_id) for im in imgs]
            owners += [(rng.choice(imgs)["id"], cat_id) for _ in range(count - images)]
        else:
            owners += [(rng.choice(imgs)["id"], cat_id) for _ in range(count)]
    owners.sort()
    by_id = {im["id"]: im for im in imgs}
    anns = []
    for ann_id, (image_id, cat_id) in enumerate(owners, start=1):
        im = by_id[image_id]
        w = rng.randint(6, max(7, im["width"] // 6))
        h = rng.randint(6, max(7, im["height"] // 6))
        x = rng.randint(0, im["width"] - w)
        y = rng.randint(0, im["height"] - h)
        anns.append({"id": ann_id, "image_id": image_id, "category_id": cat_id,
                     "bbox": [x, y, w, h], "area": w * h, "iscrowd": 0})
    cats = [{"id": i, "name": n} for i, (n, _) in enumerate(categories, start=1)]
    doc = {"images": imgs, "annotations": anns, "categories": cats}
    (HERE / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")


def main():
    build("pleiades", 103, lambda r: 512, [("Airplane", 276), ("Truncated Airplane", 14)], 103)
    build("ssdd", 1106, lambda r: r.randint(190, 600), [("Ship", 2303), ("Truncated Ship", 153)], 1106)


if __name__ == "__main__":
    main()
