pub mod oracles;
pub mod planted;
