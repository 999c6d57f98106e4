# LIEEP test suite
