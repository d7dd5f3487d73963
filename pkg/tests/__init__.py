# Tests package for evsched
