"""Feature decorrelation toolkit - source package."""
