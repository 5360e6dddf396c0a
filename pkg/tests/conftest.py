import pytest
import torch

from earlyexit.data import SynthSpec, build_vocab, encode_dataset, generate_synthetic
from earlyexit.model import ModelConfig, init_params
from earlyexit.training import TrainConfig, train

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_run():
    """A quickly trained 4-layer model on a few hundred synthetic examples."""
    examples = generate_synthetic(SynthSpec(seed=21), 400)
    vocab = build_vocab([e.text for e in examples[:300]])
    cfg = ModelConfig(depth=4, hidden_dim=32, num_heads=2, ffn_dim=64, embed_dim=16,
                      vocab_size=96, max_seq_len=24)
    train_set = encode_dataset(examples[:300], vocab, cfg.max_seq_len, 2)
    test_set = encode_dataset(examples[300:], vocab, cfg.max_seq_len, 2)
    params = init_params(cfg, seed=21)
    train(train_set, params, TrainConfig(epochs=8, seed=21, learning_rate=1e-3))
    return params, vocab, train_set, test_set
