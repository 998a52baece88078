"""Small randomly initialized encoder checkpoints.

For demos and offline tests where downloading a full pretrained model is
impossible or wasteful. The checkpoints use the standard Hugging Face layout,
so anything that accepts an encoder_id accepts these directories.
"""
from __future__ import annotations

import os

_VOCAB = (["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
          + list("abcdefghijklmnopqrstuvwxyz0123456789")
          + ["##" + c for c in "abcdefghijklmnopqrstuvwxyz"])


def make_tiny_text_encoder(path: str, seed: int = 0, dim: int = 32) -> str:
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    os.makedirs(path, exist_ok=True)
    vocab_file = os.path.join(path, "vocab.txt")
    with open(vocab_file, "w", encoding="utf-8") as f:
        f.write("\n".join(_VOCAB) + "\n")
    BertTokenizer(vocab_file).save_pretrained(path)
    torch.manual_seed(seed)
    cfg = BertConfig(vocab_size=len(_VOCAB), hidden_size=dim,
                     num_hidden_layers=1, num_attention_heads=2,
                     intermediate_size=2 * dim, max_position_embeddings=128)
    BertModel(cfg).save_pretrained(path)
    return path


def make_tiny_image_encoder(path: str, seed: int = 0, dim: int = 32) -> str:
    import torch
    from transformers import ViTConfig, ViTImageProcessor, ViTModel

    os.makedirs(path, exist_ok=True)
    torch.manual_seed(seed)
    cfg = ViTConfig(hidden_size=dim, num_hidden_layers=1,
                    num_attention_heads=2, intermediate_size=2 * dim,
                    image_size=32, patch_size=16, num_channels=3)
    ViTModel(cfg).save_pretrained(path)
    ViTImageProcessor(size={"height": 32, "width": 32}).save_pretrained(path)
    return path
