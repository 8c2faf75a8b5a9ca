"""Graph feature engineering and supervised detection of suspicious transactions."""
