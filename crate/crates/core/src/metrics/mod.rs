//! mIoU, the analytic FLOPs model, and the head benchmark harness.

mod bench;
mod flops;
mod miou;
mod table;

pub use bench::{bench_heads, percentile, BenchOptions, BenchReport, StageTiming};
pub use flops::{
    fcn3d_layer_specs, flops_conv2d, flops_conv3d, flops_interp, flops_report, head2d_layers, head3d_layers,
    speedup_ratio, FlopsLayerSpec, FlopsReport, FlopsRow, NamedLayer, Stage,
};
pub use miou::{miou, MiouReport};
pub use table::{emit_flops_table, emit_miou_table, emit_table, TableFormat};
