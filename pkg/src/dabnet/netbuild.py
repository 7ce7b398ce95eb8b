"""Layer graphs, the anti-aliasing rewrite, model parameters and checkpoints."""

import copy
import io
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T
from .tensor import DTYPE, ShapeError, Tensor

KINDS = (
    "conv", "dense", "relu", "c_relu", "aa_relu", "max_pool", "avg_pool",
    "dense_max", "dab_pool", "fixed_blur_pool", "subsample", "flatten",
)
ACTIVATIONS = ("relu", "c_relu", "aa_relu")
AF_DEFAULT_ALPHA = 6.0

MAGIC = b"AAGD"
VERSION = 1
THREADS = 1


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


@dataclass
class LayerSpec:
    kind: str
    hp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for key in ("k", "s", "m"):
            if key in self.hp and int(self.hp[key]) < 1:
                raise ValueError(f"{self.kind}: {key} must be positive, got {self.hp[key]}")
        if self.kind in ACTIVATIONS and any(key in self.hp for key in ("k", "s")):
            raise ValueError(f"activation {self.kind} takes no spatial parameters")

    def is_downsampling(self):
        if self.kind in ("max_pool", "avg_pool", "dab_pool", "fixed_blur_pool", "subsample"):
            return True
        return self.kind == "conv" and self.hp.get("s", 1) > 1

    def to_dict(self):
        return {"kind": self.kind, "hp": dict(self.hp)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("hp", {})))


@dataclass
class LayerGraph:
    input_shape: tuple
    num_classes: int
    layers: list

    def depth_levels(self):
        """Layer index of every down-sampling layer, in order (level D = position + 1)."""
        return [i for i, spec in enumerate(self.layers) if spec.is_downsampling()]

    def output_shapes(self):
        """(C, H, W) or (features,) after each layer; raises if a stage collapses."""
        shape = tuple(self.input_shape)
        shapes = []
        for i, spec in enumerate(self.layers):
            shape = _layer_shape(spec, shape, i)
            shapes.append(shape)
        return shapes

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [spec.to_dict() for spec in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), int(d["num_classes"]),
                   [LayerSpec.from_dict(x) for x in d["layers"]])


def _layer_shape(spec, shape, index):
    hp = spec.hp

    def spatial(h, w):
        if h < 1 or w < 1:
            raise ShapeError(
                f"layer {index} ({spec.kind}) leaves no spatial extent; "
                "input smaller than the total down-sampling factor"
            )
        return h, w

    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    if spec.kind == "dense":
        return (hp["out"],)
    if spec.kind in ACTIVATIONS:
        return shape
    if len(shape) != 3:
        raise ShapeError(f"layer {index} ({spec.kind}) needs a C×H×W input, got {shape}")
    C, H, W = shape
    if spec.kind == "conv":
        k, s, p = hp["k"], hp.get("s", 1), hp.get("pad", hp["k"] // 2)
        h, w = spatial((H + 2 * p - k) // s + 1, (W + 2 * p - k) // s + 1)
        return (hp["out"], h, w)
    if spec.kind in ("max_pool", "avg_pool"):
        k, s = hp["k"], hp["s"]
        return (C,) + spatial((H - k) // s + 1, (W - k) // s + 1)
    if spec.kind == "dense_max":
        if hp["k"] > min(H, W):
            raise ShapeError(f"layer {index}: dense_max window larger than {H}x{W}")
        return shape
    if spec.kind in ("dab_pool", "fixed_blur_pool", "subsample"):
        s, k = hp["s"], hp.get("k", 1)
        m = hp.get("m", {"bin3": 3, "bin5": 5}.get(hp.get("kernel"), 1))
        if m > min(H, W):
            raise ShapeError(f"layer {index}: blur kernel {m} larger than {H}x{W}")
        return (C,) + spatial(T.subsample_size(H, s, k), T.subsample_size(W, s, k))
    raise AssertionError(spec.kind)


# --------------------------------------------------------------------------
# construction and rewriting


def build_toy_cnn(input_shape=(1, 28, 28), num_classes=10, widths=(16, 32, 64),
                  downsample="max", gap_head=False):
    """Three conv blocks, each ending in a stride-2 down-sampling layer.

    ``downsample`` selects max-pool, avg-pool or strided-conv blocks;
    ``gap_head`` adds a global average pool before the classifier.
    """
    if downsample not in ("max", "avg", "conv"):
        raise ValueError(f"downsample must be max, avg or conv, got {downsample!r}")
    specs = []
    for width in widths:
        if downsample == "conv":
            specs += [LayerSpec("conv", {"out": width, "k": 3, "s": 1, "pad": 1}),
                      LayerSpec("relu"),
                      LayerSpec("conv", {"out": width, "k": 3, "s": 2, "pad": 1}),
                      LayerSpec("relu")]
        else:
            pool = "max_pool" if downsample == "max" else "avg_pool"
            specs += [LayerSpec("conv", {"out": width, "k": 3, "s": 1, "pad": 1}),
                      LayerSpec("relu"),
                      LayerSpec(pool, {"k": 2, "s": 2})]
    graph = LayerGraph(tuple(input_shape), num_classes, specs)
    if gap_head:
        C, H, W = graph.output_shapes()[-1]
        if H != W:
            raise ShapeError("global average pool head needs a square final map")
        specs.append(LayerSpec("avg_pool", {"k": H, "s": H}))
    specs += [LayerSpec("flatten"), LayerSpec("dense", {"out": num_classes})]
    graph.output_shapes()
    return graph


def rewrite_antialias(graph, m=3, af="aa_relu", blur="dab", alpha_init=AF_DEFAULT_ALPHA):
    """Replace every down-sampling layer by a blurred equivalent.

    max_pool(k, s)  -> dense_max(k), blur-pool(s)
    conv(k, s > 1)  -> conv(k, s=1), blur-pool(s)
    avg_pool(k, s)  -> blur-pool(s)

    ``blur`` is ``"dab"`` (learnable Gaussian, sigma of level D initialised
    to D/2) or a fixed binomial kernel ``"bin3"`` / ``"bin5"``. Every ReLU
    becomes ``af``. Existing blur-pool layers are left untouched, so the
    rewrite is idempotent.
    """
    if af not in ACTIVATIONS:
        raise ValueError(f"af must be one of {ACTIVATIONS}, got {af!r}")
    if blur not in ("dab", "bin3", "bin5"):
        raise ValueError(f"blur must be dab, bin3 or bin5, got {blur!r}")
    L._check_kernel_size(m)

    def blur_pool(s, k):
        if blur == "dab":
            return LayerSpec("dab_pool", {"s": s, "k": k, "m": m})
        return LayerSpec("fixed_blur_pool", {"s": s, "k": k, "kernel": blur})

    out = []
    for spec in graph.layers:
        hp = dict(spec.hp)
        if spec.kind == "max_pool":
            out += [LayerSpec("dense_max", {"k": hp["k"]}), blur_pool(hp["s"], hp["k"])]
        elif spec.kind == "avg_pool":
            out.append(blur_pool(hp["s"], hp["k"]))
        elif spec.kind == "conv" and hp.get("s", 1) > 1:
            hp.setdefault("pad", hp["k"] // 2)
            s, hp["s"] = hp["s"], 1
            out += [LayerSpec("conv", hp), blur_pool(s, 1)]
        elif spec.kind == "relu" and af != "relu":
            out.append(LayerSpec(af, {"alpha_init": alpha_init} if af == "aa_relu" else {"cap": alpha_init}))
        else:
            out.append(LayerSpec(spec.kind, hp))
    new = LayerGraph(graph.input_shape, graph.num_classes, out)
    for depth, idx in enumerate(new.depth_levels(), start=1):
        spec = new.layers[idx]
        if spec.kind == "dab_pool" and "sigma_init" not in spec.hp:
            spec.hp["sigma_init"] = depth / 2.0
    new.output_shapes()
    return new


# --------------------------------------------------------------------------
# parameters and forward pass


def param_layout(graph):
    """Ordered (name, shape) of every parameter the graph declares."""
    layout = []
    shape = tuple(graph.input_shape)
    for i, spec in enumerate(graph.layers):
        hp = spec.hp
        if spec.kind == "conv":
            layout += [(f"{i}.weight", (hp["out"], shape[0], hp["k"], hp["k"])),
                       (f"{i}.bias", (hp["out"],))]
        elif spec.kind == "dense":
            layout += [(f"{i}.weight", (shape[0], hp["out"])), (f"{i}.bias", (hp["out"],))]
        elif spec.kind == "dab_pool":
            layout.append((f"{i}.sigma", ()))
        elif spec.kind == "aa_relu":
            layout.append((f"{i}.alpha", ()))
        shape = _layer_shape(spec, shape, i)
    return layout


def init_params(graph, rng):
    """He-scaled normal weights, zero biases, configured sigma/alpha inits."""
    params = {}
    for name, shape in param_layout(graph):
        idx, what = name.split(".")
        spec = graph.layers[int(idx)]
        if what == "weight":
            fan_in = int(np.prod(shape[1:])) if spec.kind == "conv" else shape[0]
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif what == "bias":
            params[name] = np.zeros(shape, dtype=DTYPE)
        elif what == "sigma":
            params[name] = np.asarray(float(spec.hp["sigma_init"]), dtype=DTYPE)
        else:
            params[name] = np.asarray(float(spec.hp.get("alpha_init", AF_DEFAULT_ALPHA)), dtype=DTYPE)
    return params


def apply_graph(graph, params, x, capture=None):
    """Run ``graph`` on tensor ``x`` with tensor-valued ``params``.

    ``capture`` (a dict) receives the feature map entering each down-sampling
    stage, keyed by depth level. For a rewritten max-pool that is the input
    of the dense_max preceding the blur-pool.
    """
    ds = graph.depth_levels()
    level_of = {idx: d for d, idx in enumerate(ds, start=1)}
    for i, spec in enumerate(graph.layers):
        if capture is not None:
            if i in level_of and not (i > 0 and graph.layers[i - 1].kind == "dense_max"):
                capture[level_of[i]] = x.data
            elif spec.kind == "dense_max" and i + 1 in level_of:
                capture[level_of[i + 1]] = x.data
        hp = spec.hp
        p = lambda what: params[f"{i}.{what}"]  # noqa: E731
        if spec.kind == "conv":
            x = T.conv2d(x, p("weight"), p("bias"), stride=hp.get("s", 1),
                         padding=hp.get("pad", hp["k"] // 2), pad_mode=hp.get("pad_mode", "zero"))
        elif spec.kind == "dense":
            x = T.dense(x, p("weight"), p("bias"))
        elif spec.kind == "relu":
            x = T.relu(x)
        elif spec.kind == "c_relu":
            x = L.c_relu(x, hp.get("cap", AF_DEFAULT_ALPHA))
        elif spec.kind == "aa_relu":
            x = L.aa_relu(x, p("alpha"))
        elif spec.kind == "max_pool":
            x = T.max_pool(x, hp["k"], hp["s"])
        elif spec.kind == "avg_pool":
            x = T.avg_pool(x, hp["k"], hp["s"])
        elif spec.kind == "dense_max":
            x = T.dense_max(x, hp["k"])
        elif spec.kind == "dab_pool":
            x = L.dab_pool(x, p("sigma"), stride=hp["s"], k=hp.get("k", 1), m=hp.get("m", 3))
        elif spec.kind == "fixed_blur_pool":
            x = L.fixed_blur_pool(x, hp.get("kernel", "bin3"), stride=hp["s"], k=hp.get("k", 1))
        elif spec.kind == "subsample":
            x = T.subsample(x, hp["s"], hp.get("k", 1))
        elif spec.kind == "flatten":
            x = T.flatten(x)
    return x


class Model:
    """A layer graph, its parameter arrays and the input channel means.

    Inputs to :meth:`logits` are raw images in [0, 1]; the stored channel
    means are subtracted first.
    """

    differentiable = True

    def __init__(self, graph, params, input_mean=None):
        self.graph = graph
        self.params = params
        C = graph.input_shape[0]
        self.input_mean = np.zeros(C, dtype=DTYPE) if input_mean is None else np.asarray(input_mean, DTYPE)

    @property
    def num_classes(self):
        return self.graph.num_classes

    def sigma_names(self):
        return [n for n in self.params if n.endswith(".sigma")]

    def alpha_names(self):
        return [n for n in self.params if n.endswith(".alpha")]

    def sigmas(self):
        return [float(self.params[n]) for n in self.sigma_names()]

    def alphas(self):
        return [float(self.params[n]) for n in self.alpha_names()]

    def param_tensors(self, requires_grad=False):
        return {n: Tensor(v, requires_grad=requires_grad, name=n) for n, v in self.params.items()}

    def forward(self, x, param_tensors=None, capture=None):
        """Tensor-level forward; record on an active tape to get gradients."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 3:
            x = Tensor(x.data[None], x.requires_grad)
        xn = T.add(x, Tensor(-self.input_mean.reshape(1, -1, 1, 1)))
        return apply_graph(self.graph, param_tensors or self.param_tensors(), xn, capture)

    def logits(self, images, batch_size=500):
        images = np.asarray(images, dtype=DTYPE)
        if images.ndim == 3:
            images = images[None]
        tensors = self.param_tensors()
        starts = range(0, len(images), batch_size)
        run = lambda i: self.forward(images[i:i + batch_size], tensors).data  # noqa: E731
        if THREADS > 1 and len(starts) > 1:
            # shards are independent, so the result does not depend on the pool size
            with ThreadPoolExecutor(THREADS) as pool:
                out = list(pool.map(run, starts))
        else:
            out = [run(i) for i in starts]
        return np.concatenate(out) if out else np.zeros((0, self.num_classes))

    def predict(self, images, batch_size=500):
        return self.logits(images, batch_size).argmax(axis=1)

    def features(self, images, batch_size=500):
        """Feature maps entering each down-sampling stage, keyed by depth level."""
        images = np.asarray(images, dtype=DTYPE)
        tensors = self.param_tensors()
        chunks = {}
        for i in range(0, len(images), batch_size):
            cap = {}
            self.forward(images[i:i + batch_size], tensors, capture=cap)
            for d, f in cap.items():
                chunks.setdefault(d, []).append(f)
        return {d: np.concatenate(v) for d, v in sorted(chunks.items())}


class ConstantClassifier:
    """Predicts one fixed class for every input; offers no input gradient."""

    differentiable = False

    def __init__(self, label, num_classes=10):
        self.label = int(label)
        self.num_classes = num_classes

    def logits(self, images, batch_size=500):
        n = len(images) if np.ndim(images) == 4 else 1
        out = np.zeros((n, self.num_classes))
        out[:, self.label] = 1.0
        return out

    def predict(self, images, batch_size=500):
        return self.logits(images).argmax(axis=1)


def constant_model(graph, label):
    """A real network whose weights are zero and whose output bias is one-hot."""
    params = {n: np.zeros(s, dtype=DTYPE) for n, s in param_layout(graph)}
    for n in params:
        if n.endswith(".sigma") or n.endswith(".alpha"):
            params[n] = np.asarray(init_params(graph, np.random.Generator(np.random.Philox(0)))[n])
    last = [n for n, _ in param_layout(graph) if n.endswith(".bias")][-1]
    params[last][int(label)] = 1.0
    return Model(graph, params)


def set_threads(n):
    """Batch shards evaluated concurrently by :meth:`Model.logits`."""
    global THREADS
    THREADS = max(1, int(n))


def make_model(graph, seed=0):
    rng = np.random.Generator(np.random.Philox(seed))
    return Model(graph, init_params(graph, rng))


# --------------------------------------------------------------------------
# checkpoints


def _header(model, seed, epoch):
    layout = param_layout(model.graph)
    return {
        "graph": model.graph.to_dict(),
        "params": [[name, list(shape)] for name, shape in layout],
        "buffers": [["input_mean", [len(model.input_mean)]]],
        "sigmas": model.sigma_names(),
        "alphas": model.alpha_names(),
        "seed": int(seed),
        "epoch": int(epoch),
    }


def checkpoint_bytes(model, seed=0, epoch=0):
    header = json.dumps(_header(model, seed, epoch), sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    for name, shape in param_layout(model.graph):
        arr = np.asarray(model.params[name], dtype="<f8")
        if arr.shape != tuple(shape):
            raise ShapeError(f"parameter {name} has shape {arr.shape}, expected {tuple(shape)}")
        buf.write(arr.tobytes())
    buf.write(np.asarray(model.input_mean, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model, path, seed=0, epoch=0):
    data = checkpoint_bytes(model, seed, epoch)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def parse_checkpoint(data):
    """Decode checkpoint bytes into (model, metadata)."""
    if len(data) < 16:
        raise CheckpointError("checkpoint truncated before header")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (reader is {VERSION})")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    graph = LayerGraph.from_dict(header["graph"])
    offset = 16 + hlen
    arrays = {}
    for name, shape in header["params"] + header["buffers"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(data):
            raise CheckpointError(f"checkpoint truncated inside parameter {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(DTYPE).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after parameters")
    expected = [[n, list(s)] for n, s in param_layout(graph)]
    if expected != header["params"]:
        raise CheckpointError("parameter table does not match the stored layer graph")
    input_mean = arrays.pop("input_mean")
    model = Model(graph, arrays, input_mean)
    meta = {k: header[k] for k in ("seed", "epoch", "sigmas", "alphas")}
    return model, meta


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def clone_model(model):
    return Model(copy.deepcopy(model.graph), {k: v.copy() for k, v in model.params.items()},
                 model.input_mean.copy())
