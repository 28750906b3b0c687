"""Container auction simulator - batch posted-price auctions for cloud containers."""
