"""CTR prediction with hashed embeddings and trainable embedding modules."""
