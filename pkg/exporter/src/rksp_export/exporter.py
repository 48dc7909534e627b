"""Forward-only residual-stream exporter.

Runs one batched forward pass over a fixed prompt list on any model
that exposes per-layer hidden states (the transformers convention:
``model(input_ids, output_hidden_states=True)`` returning an object
with a ``hidden_states`` tuple of L+1 tensors of shape [batch, tokens,
dim]). Token positions are flattened into independent state columns,
the same subsampled column indices are used for every layer, and the
result is written as a stream-mode RKSP snapshot container (L+1
matrices, so consecutive-layer pairing is structural).

No parameters are read and no gradients flow; the exporter only needs
forward activations.
"""

from __future__ import annotations

import argparse
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RKSP"
FORMAT_VERSION = 1
FLAG_STREAM = 0x1
_HEADER = struct.Struct("<4sIIIIIB7x")
TOTAL_PROMPTS = 32            # prompt list is cycled up to this many runs


class HookFailure(RuntimeError):
    """Model does not expose the expected per-layer hidden states."""


class ShapeDrift(RuntimeError):
    """Hidden dimension changes across layers."""


@dataclass
class ExportSpec:
    """What to capture and how many states to keep."""

    prompts: list[str]
    token_cap: int = 64
    max_states: int = 2048
    seed: int = 0
    expect_layers: int | None = None   # HookFailure if the model has fewer

    def prompt_schedule(self) -> list[str]:
        """Cycle the prompt list up to the fixed per-run total."""
        if not self.prompts:
            raise ValueError("prompt list is empty")
        reps = -(-TOTAL_PROMPTS // len(self.prompts))
        return (self.prompts * reps)[:TOTAL_PROMPTS]


@dataclass
class ExportSummary:
    layer_count: int
    hidden_dim: int
    states_written: int
    states_captured: int
    truncated_prompts: int
    out_path: str
    layer_shapes: list[tuple[int, int]] = field(default_factory=list)


def byte_tokenize(text: str, token_cap: int) -> list[int]:
    """Deterministic fallback tokenizer: UTF-8 bytes as token ids."""
    return list(text.encode("utf-8"))[:token_cap]


def capture_hidden_states(model, token_ids: list[list[int]]):
    """One padded forward pass; returns per-layer [states x dim] arrays."""
    import torch

    max_len = max(len(ids) for ids in token_ids)
    batch = torch.zeros((len(token_ids), max_len), dtype=torch.long)
    mask = torch.zeros((len(token_ids), max_len), dtype=torch.bool)
    for row, ids in enumerate(token_ids):
        batch[row, :len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[row, :len(ids)] = True

    with torch.no_grad():
        try:
            output = model(batch, output_hidden_states=True)
        except TypeError as exc:
            raise HookFailure(f"model rejected output_hidden_states: {exc}") from exc
    hidden = getattr(output, "hidden_states", None)
    if hidden is None and isinstance(output, dict):
        hidden = output.get("hidden_states")
    if not hidden:
        raise HookFailure("model returned no hidden_states")

    flat = []
    keep = mask.reshape(-1)
    dim = None
    for tensor in hidden:
        arr = tensor.detach().to(torch.float32).reshape(-1, tensor.shape[-1])
        arr = arr[keep].cpu().numpy()      # drop padding positions
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise ShapeDrift(f"hidden dim changed from {dim} to {arr.shape[1]}")
        flat.append(arr)
    return flat   # list of (total_states, dim), length L+1


def write_stream_container(states: list[np.ndarray], path) -> None:
    """Write L+1 [dim x N] matrices as a stream-mode f32 container."""
    layers = len(states) - 1
    dim, count = states[0].shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, FLAG_STREAM, layers, dim, count, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        for mat in states:
            fh.write(np.asfortranarray(mat.astype(np.float32)).tobytes(order="F"))


def export(model, spec: ExportSpec, out_path, tokenizer=None) -> ExportSummary:
    """Capture, subsample with shared indices, and write the container."""
    schedule = spec.prompt_schedule()
    truncated = 0
    token_ids = []
    for prompt in schedule:
        if tokenizer is not None:
            ids = tokenizer(prompt)[:spec.token_cap]
        else:
            ids = byte_tokenize(prompt, spec.token_cap)
        full_len = (len(tokenizer(prompt)) if tokenizer is not None
                    else len(prompt.encode("utf-8")))
        truncated += full_len > spec.token_cap
        if not ids:
            raise ValueError(f"prompt tokenized to nothing: {prompt!r}")
        token_ids.append(ids)

    flat = capture_hidden_states(model, token_ids)
    if spec.expect_layers is not None and len(flat) - 1 < spec.expect_layers:
        raise HookFailure(f"model exposes {len(flat) - 1} layers, "
                          f"expected {spec.expect_layers}")
    captured = flat[0].shape[0]
    keep = min(spec.max_states, captured)
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(captured, size=keep, replace=False))
    states = [np.ascontiguousarray(mat[idx].T) for mat in flat]   # dim x N

    write_stream_container(states, out_path)
    summary = ExportSummary(
        layer_count=len(states) - 1,
        hidden_dim=states[0].shape[0],
        states_written=keep,
        states_captured=captured,
        truncated_prompts=truncated,
        out_path=str(out_path),
        layer_shapes=[tuple(mat.shape) for mat in states],
    )
    return summary


def load_hf_model(name_or_path: str):
    """Load a transformers model (and tokenizer when available)."""
    try:
        from transformers import AutoModelForCausalLM, AutoModel
    except ImportError as exc:
        raise HookFailure("transformers is not installed; pass a model object "
                          "or install rksp-export[hf]") from exc
    try:
        model = AutoModelForCausalLM.from_pretrained(name_or_path)
    except Exception:
        model = AutoModel.from_pretrained(name_or_path)
    model.eval()
    tokenizer = None
    try:
        from transformers import AutoTokenizer
        hf_tok = AutoTokenizer.from_pretrained(name_or_path)
        if hf_tok("tokenizer probe")["input_ids"]:

            def tokenizer(text):
                return hf_tok(text)["input_ids"]
    except Exception:
        tokenizer = None     # byte-level fallback
    return model, tokenizer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rksp-export",
        description="Capture residual-stream snapshots from one forward pass")
    parser.add_argument("--model", required=True, help="model name or local path")
    parser.add_argument("--prompts", required=True, help="text file, one prompt per line")
    parser.add_argument("--n", type=int, default=2048, help="max states to keep")
    parser.add_argument("--token-cap", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--expect-layers", type=int, default=None)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    try:
        prompts = [line for line in Path(args.prompts).read_text(
            encoding="utf-8").splitlines() if line.strip()]
        model, tokenizer = load_hf_model(args.model)
        spec = ExportSpec(prompts=prompts, token_cap=args.token_cap,
                          max_states=args.n, seed=args.seed,
                          expect_layers=args.expect_layers)
        summary = export(model, spec, args.out, tokenizer=tokenizer)
    except (HookFailure, ShapeDrift, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for layer, shape in enumerate(summary.layer_shapes):
        label = f"h_{layer}"
        print(f"{label}: {shape[0]} x {shape[1]}")
    print(f"wrote {summary.layer_count} layer pairs "
          f"({summary.states_written}/{summary.states_captured} states"
          f", {summary.truncated_prompts} prompts truncated) -> {summary.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
