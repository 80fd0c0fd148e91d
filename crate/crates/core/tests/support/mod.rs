#![allow(dead_code)]

pub mod bleu_reference;
