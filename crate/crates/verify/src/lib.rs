//! Hosts the `acceptance` test target, which runs after the other workspace
//! test binaries so a failing criterion never hides their results.
