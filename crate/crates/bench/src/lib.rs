pub mod mass_spring;
pub mod qpfile;
pub mod report;
pub mod run;
