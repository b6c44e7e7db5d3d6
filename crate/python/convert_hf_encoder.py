#!/usr/bin/env python3
"""Convert a Hugging Face BERT-style encoder to the domainrc pretrained
format (config.json + vocab.txt + params.bin).

Works offline given a local model directory:

    python3 python/convert_hf_encoder.py /path/to/bert-base-cased out/bert-base-cased

Then train with `--encoder out/bert-base-cased` (or set DOMAINRC_PRETRAINED
to that directory and use `--encoder bert-base-cased`).

`--selftest` builds a randomly initialized two-layer BERT, converts it, and
checks that the Rust forward pass (via the domainrc_py extension, built on
demand) matches torch in double precision.
"""

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

MAGIC = b"DRCTNSR1"


def write_tensors(path: Path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                f.write(struct.pack("<Q", dim))
            f.write(data.tobytes())


def convert_state_dict(state: dict, layers: int) -> dict:
    """Maps HF BERT tensor names to domainrc names. HF linear weights are
    (out, in); domainrc computes x @ W with W (in, out), so they transpose."""

    def get(key):
        for prefix in ("", "bert."):
            full = prefix + key
            if full in state:
                return state[full].detach().cpu().double().numpy()
        raise KeyError(f"tensor {key} not found in the state dict")

    tensors = {
        "embeddings.word": get("embeddings.word_embeddings.weight"),
        "embeddings.position": get("embeddings.position_embeddings.weight"),
        "embeddings.segment": get("embeddings.token_type_embeddings.weight"),
        "embeddings.ln.gamma": get("embeddings.LayerNorm.weight"),
        "embeddings.ln.beta": get("embeddings.LayerNorm.bias"),
    }
    for i in range(layers):
        hf = f"encoder.layer.{i}"
        ours = f"layer{i}"
        for theirs, mine in [
            ("attention.self.query", "attn.query"),
            ("attention.self.key", "attn.key"),
            ("attention.self.value", "attn.value"),
            ("attention.output.dense", "attn.output"),
        ]:
            tensors[f"{ours}.{mine}.weight"] = get(f"{hf}.{theirs}.weight").T
            tensors[f"{ours}.{mine}.bias"] = get(f"{hf}.{theirs}.bias")
        tensors[f"{ours}.attn.ln.gamma"] = get(f"{hf}.attention.output.LayerNorm.weight")
        tensors[f"{ours}.attn.ln.beta"] = get(f"{hf}.attention.output.LayerNorm.bias")
        tensors[f"{ours}.ffn.lin1.weight"] = get(f"{hf}.intermediate.dense.weight").T
        tensors[f"{ours}.ffn.lin1.bias"] = get(f"{hf}.intermediate.dense.bias")
        tensors[f"{ours}.ffn.lin2.weight"] = get(f"{hf}.output.dense.weight").T
        tensors[f"{ours}.ffn.lin2.bias"] = get(f"{hf}.output.dense.bias")
        tensors[f"{ours}.ffn.ln.gamma"] = get(f"{hf}.output.LayerNorm.weight")
        tensors[f"{ours}.ffn.ln.beta"] = get(f"{hf}.output.LayerNorm.bias")
    return tensors


def encoder_config(config) -> dict:
    return {
        "vocab_size": config.vocab_size,
        "hidden": config.hidden_size,
        "layers": config.num_hidden_layers,
        "heads": config.num_attention_heads,
        "feed_forward": config.intermediate_size,
        "max_len": config.max_position_embeddings,
        "dropout": config.hidden_dropout_prob,
        "layer_norm_eps": config.layer_norm_eps,
        "init_std": config.initializer_range,
    }


def convert(model_dir: str, out_dir: Path) -> None:
    from transformers import AutoConfig, AutoModel, AutoTokenizer

    out_dir.mkdir(parents=True, exist_ok=True)
    config = AutoConfig.from_pretrained(model_dir)
    model = AutoModel.from_pretrained(model_dir)
    tokenizer = AutoTokenizer.from_pretrained(model_dir)

    if getattr(config, "hidden_act", "gelu") != "gelu":
        raise SystemExit(f"unsupported activation {config.hidden_act!r}; expected gelu")

    with open(out_dir / "config.json", "w") as f:
        json.dump(encoder_config(config), f, indent=2)
    tokenizer.save_vocabulary(str(out_dir))
    write_tensors(out_dir / "params.bin", convert_state_dict(model.state_dict(), config.num_hidden_layers))
    print(f"wrote {out_dir}/[config.json vocab.txt params.bin]")


def selftest() -> int:
    import tempfile

    import torch
    from transformers import BertConfig, BertModel

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=50,
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=24,
        hidden_act="gelu",
    )
    model = BertModel(config).double().eval()

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "converted"
        out.mkdir()
        with open(out / "config.json", "w") as f:
            json.dump(encoder_config(config), f)
        with open(out / "vocab.txt", "w") as f:
            pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
            pieces += [f"tok{i}" for i in range(config.vocab_size - len(pieces))]
            f.write("\n".join(pieces) + "\n")
        write_tensors(out / "params.bin", convert_state_dict(model.state_dict(), config.num_hidden_layers))

        ids = [2, 7, 13, 44, 9, 3]
        with torch.no_grad():
            reference = model(input_ids=torch.tensor([ids])).last_hidden_state[0].numpy()

        sys.path.insert(0, str(Path(__file__).parent))
        import smoke_test

        m = smoke_test.build_and_import("release")
        states = np.array(m.pretrained_encoder_states(str(out), ids))

        worst = float(np.abs(states - reference).max())
        print(f"max |rust - torch| over {states.shape} states: {worst:.3e}")
        assert worst < 1e-10, "converted encoder disagrees with torch"
        print("selftest OK")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("model_dir", nargs="?", help="local HF model directory (or hub id if online)")
    parser.add_argument("out_dir", nargs="?", help="output directory")
    parser.add_argument("--selftest", action="store_true", help="verify the conversion pipeline")
    args = parser.parse_args()

    if args.selftest:
        return selftest()
    if not args.model_dir or not args.out_dir:
        parser.error("model_dir and out_dir are required (or use --selftest)")
    convert(args.model_dir, Path(args.out_dir))
    return 0


if __name__ == "__main__":
    sys.exit(main())
