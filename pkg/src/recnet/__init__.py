"""Two-stage article recommender."""
