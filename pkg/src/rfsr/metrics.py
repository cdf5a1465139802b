"""Reference metrics and evaluation reports."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .flow import FlowVariant, perceptual_surrogate
from .sample import sample_ode
from .sched import shift_grid, uniform_grid

Tensor = torch.Tensor

LUMA = (0.299, 0.587, 0.114)  # BT.601


def to_y(x: Tensor) -> Tensor:
    """BT.601 luma of an N x 3 x H x W batch; other channel counts pass through."""
    if x.shape[1] != 3:
        return x
    r, g, b = x[:, 0:1], x[:, 1:2], x[:, 2:3]
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def _check(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ValueError(f"metric shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: Tensor, b: Tensor, y_channel: bool = True) -> float:
    """10 log10(1 / MSE) over the whole tensor; ``inf`` when the inputs match."""
    _check(a, b)
    a, b = a.detach().double(), b.detach().double()
    if y_channel:
        a, b = to_y(a), to_y(b)
    err = torch.mean((a - b) ** 2).item()
    if err == 0:
        return math.inf
    return 10 * math.log10(1.0 / err)


def _gauss_window(size=11, sigma=1.5):
    x = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: Tensor, b: Tensor, window: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM with a Gaussian window (valid positions only).

    RGB inputs are reduced to luma first; multi-image batches and other
    channel counts are averaged over every window position.
    """
    _check(a, b)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"image {tuple(a.shape[-2:])} smaller than the {window}px SSIM window")
    c1, c2 = 0.01**2, 0.03**2
    a, b = to_y(a.detach().double()), to_y(b.detach().double())
    if torch.equal(a, b):
        return 1.0
    n, c = a.shape[:2]
    w = _gauss_window(window, sigma)[None, None].repeat(c, 1, 1, 1)
    filt = lambda z: F.conv2d(z, w, groups=c)  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a**2
    s_bb = filt(b * b) - mu_b**2
    s_ab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    return (num / den).mean().item()


def image_metrics(pred: Tensor, ref: Tensor) -> tuple[float, float, float]:
    """Per-image PSNR, SSIM and surrogate error, each averaged over the batch."""
    _check(pred, ref)
    ps, ss, sg = [], [], []
    for i in range(pred.shape[0]):
        p, r = pred[i:i + 1].double(), ref[i:i + 1].double()
        ps.append(psnr(p, r))
        ss.append(ssim(p, r))
        sg.append(perceptual_surrogate(p, r).item())
    k = len(ps)
    return sum(ps) / k, sum(ss) / k, sum(sg) / k


@dataclass
class EvalRow:
    method: str
    steps: int
    psnr_db: float
    ssim: float
    surrogate_lpips: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    config_digest: str = ""
    seeds: list[int] = field(default_factory=list)
    notes: list[str] = field(default_factory=lambda: [
        "surrogate_lpips = mean |Sobel(pred) - Sobel(ref)|, a gradient-difference stand-in for LPIPS",
        "no-reference IQA metrics (NIQE/MUSIQ/MANIQA/CLIPIQA) are not computed; quality trends use the surrogate",
    ])
    config_text: str = ""

    def row(self, method: str, steps: int) -> EvalRow:
        for r in self.rows:
            if r.method == method and r.steps == steps:
                return r
        raise KeyError((method, steps))

    def to_text(self) -> str:
        lines = [f"# {n}" for n in self.notes]
        lines.append(f"# config_digest {self.config_digest}  seeds {','.join(map(str, self.seeds))}")
        head = f"{'method':<28}{'steps':>6}{'psnr_db':>10}{'ssim':>9}{'surrogate':>11}"
        lines += [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.method:<28}{r.steps:>6}{r.psnr_db:>10.3f}{r.ssim:>9.4f}{r.surrogate_lpips:>11.4f}")
        if self.config_text:
            lines.append("# resolved config")
            lines += [f"#   {ln}" for ln in self.config_text.splitlines()]
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        meta = {"kind": "meta", "config_digest": self.config_digest, "seeds": self.seeds,
                "notes": self.notes, "config": self.config_text}
        out = [json.dumps(meta)]
        out += [json.dumps({"kind": "row", **asdict(r)}) for r in self.rows]
        return "\n".join(out) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EvalReport":
        rep = cls()
        for line in text.splitlines():
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "meta":
                rep.config_digest, rep.seeds = rec["config_digest"], rec["seeds"]
                rep.notes, rep.config_text = rec["notes"], rec["config"]
            else:
                rep.rows.append(EvalRow(**rec))
        return rep


def inference_grid(steps: int, shift: float = 1.0):
    return shift_grid(uniform_grid(steps), shift)


@torch.no_grad()
def evaluate(net, x_hr: Tensor, x_lr: Tensor, step_counts=(4, 1), variant: FlowVariant | None = None,
             shift: float = 1.0, seed: int = 0, label: str = "model", chunk: int = 64) -> EvalReport:
    """Sample every LR input at each step count and score against HR.

    Adds two baseline rows: the nearest-upsampled LR input itself and the HR
    oracle.
    """
    if x_hr.shape[0] == 0:
        raise ValueError("evaluation split is empty")
    variant = variant or FlowVariant()
    dtype = next(net.parameters()).dtype if hasattr(net, "parameters") else x_lr.dtype
    rep = EvalReport(seeds=[seed])
    for n in step_counts:
        gen = torch.Generator().manual_seed(seed)
        preds = []
        for i in range(0, x_lr.shape[0], chunk):
            lr = x_lr[i:i + chunk].to(dtype)
            preds.append(sample_ode(lr, net, inference_grid(n, shift), variant, gen).final)
        rep.rows.append(EvalRow(label, n, *image_metrics(torch.cat(preds), x_hr)))
    rep.rows.append(EvalRow("nearest-upsample", 0, *image_metrics(x_lr, x_hr)))
    rep.rows.append(EvalRow("oracle-hr", 0, *image_metrics(x_hr, x_hr)))
    return rep
