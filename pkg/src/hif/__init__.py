"""Motion-hindsight action policy toolkit.

A small, auditable stack: a dense-tensor autodiff engine, block-matching
motion extraction, a motion-history encoder, a toy vision-language
backbone with parallel foresight/action queries, and a history-modulated
joint expert, trained by behavior cloning on synthetic history-dependent
manipulation tasks.
"""

__version__ = "0.1.0"
