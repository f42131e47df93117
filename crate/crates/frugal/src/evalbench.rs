//! Correlation, retained-performance, ablation, and runtime benchmarks.
