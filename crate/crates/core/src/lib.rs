#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod assignment;
pub mod evaluation;
pub mod geometry;
pub mod matching;
pub mod numerics;
pub mod scene;
pub mod simulator;
pub mod tracker;
