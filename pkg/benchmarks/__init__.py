"""Performance benchmarks for the cough toolbox pipelines."""
