//! Experiment orchestration: sweeps, crossover extraction, CSV/SVG emission.
// (filled in after kernel benchmarking)
