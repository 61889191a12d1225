"""Grid types, differential operators, FGRD files and dataset manifests."""
