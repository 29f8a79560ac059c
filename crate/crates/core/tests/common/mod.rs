//! Checks shared by the property, gradient and acceptance targets.
#![allow(dead_code)]

pub mod grad;
pub mod identities;
pub mod oracle;
