#![allow(dead_code)]

pub mod resultant;
