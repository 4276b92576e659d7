//! Interior point solvers for the quadratic programs arising in model
//! predictive control: dense QPs, optimal control QPs and tree-structured
//! optimal control QPs, with Riccati-based KKT solvers and condensing.

pub mod ipm_core;
pub mod linalg;
pub mod qp_data;
pub mod kkt_dense;
pub mod kkt_ocp;
pub mod kkt_tree;
pub mod condensing;
pub mod solver;
pub mod testgen;
