# Shared library for MAP hypothesis testing on linear inverse problems
