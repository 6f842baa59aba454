from __future__ import annotations

import pytest
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

SEED = 1234
VOCAB_SIZE = 320

TRAIN_TEXT = [
    "the quick brown fox jumps over the lazy dog " * 3,
    "pack my box with five dozen liquor jugs",
    "how vexingly quick daft zebras jump",
    "numbers 0 1 2 3 4 5 6 7 8 9 and words",
]


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory) -> str:
    """A tiny randomly initialized causal LM with a byte-level BPE tokenizer.

    Byte-level BPE round-trips arbitrary ASCII exactly; the fixed torch seed
    makes the weights, and therefore every logits row, reproducible.
    """
    tok = Tokenizer(models.BPE(unk_token=None))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=VOCAB_SIZE,
        special_tokens=["<|endoftext|>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator(TRAIN_TEXT, trainer)
    tokenizer = PreTrainedTokenizerFast(tokenizer_object=tok, eos_token="<|endoftext|>")

    torch.manual_seed(SEED)
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=64,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=tokenizer.eos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    model = GPT2LMHeadModel(config)
    model.eval()

    path = tmp_path_factory.mktemp("tiny_checkpoint")
    tokenizer.save_pretrained(path)
    model.save_pretrained(path)
    return str(path)
