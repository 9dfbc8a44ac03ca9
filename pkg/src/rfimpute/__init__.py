"""Random Forest and autoencoder/GA imputation for survey data, with an
impact-assessment battery comparing imputed sets against the complete data."""

__version__ = "0.1.0"
