pub mod data;
pub mod oracle;
pub mod nodes;
