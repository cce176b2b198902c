"""Warped language model pretraining and ASR-noise SLU pipeline.

Subpackages:
    textcore  -- tokenization, vocabulary, corpus ingestion
    warp      -- mask/keep/rand/insert/drop corruption plans and application
    nnet      -- numpy transformer encoder, exact backward pass, Adam
    pretrain  -- warped-LM pretraining loop and validation metrics
    slu       -- joint intent/slot model, fine-tuning, CoNLL-style metrics
    asrsim    -- ASR-noise simulator, alignment, WER, label transfer
    synth     -- synthetic corpus and SLU task generators
    experiment-- objective x setting x seed matrix runner and reporting
    cli       -- command-line entry points
"""

__version__ = "0.1.0"
