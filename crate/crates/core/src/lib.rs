#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod geometry;
pub mod optim;
pub mod perception;
pub mod vehicle;
pub mod controller;
pub mod link;
pub mod harness;
