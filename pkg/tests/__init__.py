# flatscan test suites
