"""Regenerate the bundled network configs in src/sparse_bitserial/networks/.

Shapes are written pre-padded; ``pad`` records the zero border added to the
previous layer's output. Branchy topologies are emitted as non-sequential
layer lists.
"""

from pathlib import Path

import yaml

OUT = Path(__file__).resolve().parents[1] / "src" / "sparse_bitserial" / "networks"


def conv(name, cin, cout, size, k, stride=1, pad=None, relu=True, pool=None):
    pad = (k - 1) // 2 if pad is None else pad
    d = {"name": name, "kind": "CONV", "n_ic": cin, "n_oc": cout,
         "h_i": size + 2 * pad, "w_i": size + 2 * pad, "h_k": k, "w_k": k,
         "stride": stride, "pad": pad, "post_relu": relu}
    if pool:
        d["pool"] = {"window": pool[0], "stride": pool[1]}
    return d


def fc(name, cin, cout, relu=True):
    return {"name": name, "kind": "FC", "n_ic": cin, "n_oc": cout, "post_relu": relu}


def alexnet():
    layers = [
        conv("conv1", 3, 96, 227, 11, stride=4, pad=0, pool=(3, 2)),
        conv("conv2", 96, 256, 27, 5, pool=(3, 2)),
        conv("conv3", 256, 384, 13, 3),
        conv("conv4", 384, 384, 13, 3),
        conv("conv5", 384, 256, 13, 3, pool=(3, 2)),
        fc("fc6", 256 * 6 * 6, 4096),
        fc("fc7", 4096, 4096),
        fc("fc8", 4096, 1000, relu=False),
    ]
    return {"name": "alexnet", "input": [3, 227, 227], "sequential": True,
            "precision": 16, "n_nzb_max": 3, "layers": layers}


def vgg16():
    cfg = [64, 64, "P", 128, 128, "P", 256, 256, 256, "P", 512, 512, 512, "P", 512, 512, 512, "P"]
    layers, cin, size, i = [], 3, 224, 0
    for j, v in enumerate(cfg):
        if v == "P":
            continue
        i += 1
        pool = (2, 2) if j + 1 < len(cfg) and cfg[j + 1] == "P" else None
        layers.append(conv(f"conv{i}", cin, v, size, 3, pool=pool))
        cin = v
        if pool:
            size //= 2
    layers += [fc("fc6", 512 * 7 * 7, 4096), fc("fc7", 4096, 4096), fc("fc8", 4096, 1000, relu=False)]
    return {"name": "vgg16", "input": [3, 224, 224], "sequential": True,
            "precision": 16, "n_nzb_max": 3, "layers": layers}


def resnet50():
    layers = [conv("conv1", 3, 64, 224, 7, stride=2, pad=3)]
    cin = 64
    size = 56
    for stage, (width, blocks) in enumerate([(64, 3), (128, 4), (256, 6), (512, 3)], start=2):
        cout = width * 4
        for blk in range(blocks):
            stride = 2 if blk == 0 and stage > 2 else 1
            in_size = size * stride
            p = f"res{stage}{chr(ord('a') + blk)}"
            layers.append(conv(f"{p}_1x1a", cin, width, in_size, 1))
            # 3x3 carries the stride: (in + 2 - 3) // s + 1 == size
            layers.append(conv(f"{p}_3x3", width, width, in_size, 3, stride=stride))
            layers.append(conv(f"{p}_1x1b", width, cout, size, 1, relu=False))
            if blk == 0:
                layers.append(conv(f"{p}_proj", cin, cout, in_size, 1, stride=stride, relu=False))
            cin = cout
        size //= 2
    layers.append(fc("fc", 2048, 1000, relu=False))
    return {"name": "resnet50", "input": [3, 224, 224], "sequential": False,
            "precision": 16, "n_nzb_max": 3, "layers": layers}


def googlenet():
    layers = [
        conv("conv1", 3, 64, 224, 7, stride=2, pad=3),
        conv("conv2_reduce", 64, 64, 56, 1),
        conv("conv2", 64, 192, 56, 3),
    ]
    modules = [
        ("3a", 28, 192, 64, 96, 128, 16, 32, 32),
        ("3b", 28, 256, 128, 128, 192, 32, 96, 64),
        ("4a", 14, 480, 192, 96, 208, 16, 48, 64),
        ("4b", 14, 512, 160, 112, 224, 24, 64, 64),
        ("4c", 14, 512, 128, 128, 256, 24, 64, 64),
        ("4d", 14, 512, 112, 144, 288, 32, 64, 64),
        ("4e", 14, 528, 256, 160, 320, 32, 128, 128),
        ("5a", 7, 832, 256, 160, 320, 32, 128, 128),
        ("5b", 7, 832, 384, 192, 384, 48, 128, 128),
    ]
    for name, s, cin, n1, r3, n3, r5, n5, pp in modules:
        layers += [
            conv(f"inc{name}_1x1", cin, n1, s, 1),
            conv(f"inc{name}_3x3_reduce", cin, r3, s, 1),
            conv(f"inc{name}_3x3", r3, n3, s, 3),
            conv(f"inc{name}_5x5_reduce", cin, r5, s, 1),
            conv(f"inc{name}_5x5", r5, n5, s, 5),
            conv(f"inc{name}_pool_proj", cin, pp, s, 1),
        ]
    layers.append(fc("fc", 1024, 1000, relu=False))
    return {"name": "googlenet", "input": [3, 224, 224], "sequential": False,
            "precision": 16, "n_nzb_max": 4, "layers": layers}


def yolov3():
    layers = [conv("conv0", 3, 32, 416, 3)]
    cin, size, idx = 32, 416, 1
    for cout, reps in [(64, 1), (128, 2), (256, 8), (512, 8), (1024, 4)]:
        layers.append(conv(f"conv{idx}", cin, cout, size // 2, 3, stride=2, pad=1))
        # stride-2 3x3 reads the padded previous map: (size + 2 - 3) // 2 + 1
        layers[-1]["h_i"] = layers[-1]["w_i"] = size + 2
        idx += 1
        size //= 2
        for _ in range(reps):
            layers.append(conv(f"conv{idx}", cout, cout // 2, size, 1))
            layers.append(conv(f"conv{idx + 1}", cout // 2, cout, size, 3))
            idx += 2
        cin = cout

    def head(cin, width, size):
        nonlocal idx
        out = []
        c = cin
        for _ in range(3):
            out.append(conv(f"conv{idx}", c, width, size, 1))
            out.append(conv(f"conv{idx + 1}", width, width * 2, size, 3))
            idx += 2
            c = width * 2
        out[-2]["name"] = out[-2]["name"]  # branch point feeds the route 1x1
        out.append(conv(f"conv{idx}", width * 2, 255, size, 1, relu=False))
        idx += 1
        return out

    layers += head(1024, 512, 13)
    layers.append(conv(f"conv{idx}", 512, 256, 13, 1))
    idx += 1
    layers += head(256 + 512, 256, 26)
    layers.append(conv(f"conv{idx}", 256, 128, 26, 1))
    idx += 1
    layers += head(128 + 256, 128, 52)
    return {"name": "yolov3", "input": [3, 416, 416], "sequential": False,
            "precision": 16, "n_nzb_max": 3, "layers": layers}


def smoke():
    layers = [
        conv("conv1", 3, 8, 10, 3, pad=0, pool=(2, 2)),
        conv("conv2", 8, 4, 4, 3, pad=1),
    ]
    return {"name": "smoke", "input": [3, 10, 10], "sequential": True,
            "precision": 16, "n_nzb_max": 3, "layers": layers}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (alexnet, vgg16, resnet50, googlenet, yolov3, smoke):
        net = build()
        (OUT / f"{net['name']}.yaml").write_text(
            yaml.safe_dump(net, sort_keys=False, default_flow_style=None, width=120))
        print(net["name"], len(net["layers"]), "layers")


if __name__ == "__main__":
    main()
