"""Q-learning controllers and their environments."""
