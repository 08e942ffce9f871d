"""leotrace tests."""
