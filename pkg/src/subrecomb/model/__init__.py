from .network import (  # noqa: F401
    Adam,
    EncoderConfig,
    Network,
    bce_with_logits,
    load_checkpoint,
    parameter_digest,
    save_checkpoint,
    sigmoid,
)
