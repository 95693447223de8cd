# manifoldood project package
