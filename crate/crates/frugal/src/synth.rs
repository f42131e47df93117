//! Synthetic pair dataset generation and annotation.
