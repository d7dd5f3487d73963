"""
API module for evsched

Contains the FastAPI application and request/response models.
"""
