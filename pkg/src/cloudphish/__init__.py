"""Detection of phishing pages hosted on cloud services from URL, logo and page-appearance signals."""

__version__ = "0.1.0"
