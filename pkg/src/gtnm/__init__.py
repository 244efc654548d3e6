"""gtnm: method name recommendation for Java from multi-level code context.

The pipeline runs in four stages, each usable on its own:

1. ``jparse``   -- declaration-level Java parsing and context extraction
2. ``tokens``   -- subtoken splitting and vocabulary handling
3. ``corpus``   -- record building, dataset splits, overlap statistics
4. ``model`` / ``runtime`` -- a small seq2seq transformer trained to emit
   method-name subtokens, with greedy/beam decoding and confidence scores

``cli`` ties the stages together behind one console entry point.
"""

__version__ = "0.1.0"
