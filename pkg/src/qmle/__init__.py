"""Q-learning with sampled, MLE-amortized maximization over complex action spaces."""
