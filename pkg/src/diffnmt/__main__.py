from diffnmt.cli import main

raise SystemExit(main())
